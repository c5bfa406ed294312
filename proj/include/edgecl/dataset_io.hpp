#pragma once

// On-disk domain dataset: <dir>/manifest.json + <dir>/data.bin.
//
// data.bin is little-endian, one record per entry:
//   u32 N | f64 timestamps[N] | f32 (re, im) interleaved [N * L_H] | u16 label
// The label is the 1-based class id; 0 marks an unlabelled sequence.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgecl/common.hpp"
#include "edgecl/csi_sim.hpp"

namespace edgecl {

namespace io {

namespace fs = std::filesystem;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    require<IoError>(pos_ + sizeof(T) <= data_.size(), "truncated binary file at offset ", pos_);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(static_cast<bool>(in), "cannot open ", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write-temp-then-rename so readers never observe a half-written file.
inline void write_file_atomic(const fs::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require<IoError>(static_cast<bool>(out), "cannot write ", tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require<IoError>(static_cast<bool>(out), "write failed for ", tmp.string());
  }
  fs::rename(tmp, path, ec);
  require<IoError>(!ec, "cannot rename ", tmp.string(), ": ", ec.message());
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream oss;
  oss << std::hex << std::setw(16) << std::setfill('0') << v;
  return oss.str();
}

}  // namespace io

inline std::size_t record_bytes(std::size_t n_samples, std::size_t sample_length) {
  return 4 + 8 * n_samples + 8 * n_samples * sample_length + 2;
}

inline std::string encode_sequences(const std::vector<const CsiSequence*>& seqs, std::size_t sample_length) {
  std::string out;
  for (const CsiSequence* s : seqs) {
    require(s->samples.size() == s->timestamps.size(), "timestamp/sample count mismatch");
    out.reserve(out.size() + record_bytes(s->length(), sample_length));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s->length()));
    for (double t : s->timestamps) io::put_le<double>(out, t);
    for (const auto& h : s->samples) {
      require(h.size() == sample_length, "CSI sample length mismatch");
      for (const cplx& v : h) {
        io::put_le<float>(out, static_cast<float>(v.real()));
        io::put_le<float>(out, static_cast<float>(v.imag()));
      }
    }
    const std::size_t label = s->label ? *s->label + 1 : 0;
    require(label <= std::numeric_limits<std::uint16_t>::max(), "label does not fit in u16");
    io::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(label));
  }
  return out;
}

inline std::vector<CsiSequence> decode_sequences(std::string bytes, std::size_t sample_length) {
  io::ByteReader reader(std::move(bytes));
  std::vector<CsiSequence> out;
  while (!reader.done()) {
    CsiSequence s;
    const auto n = reader.get<std::uint32_t>();
    s.timestamps.resize(n);
    for (auto& t : s.timestamps) t = reader.get<double>();
    s.samples.assign(n, std::vector<cplx>(sample_length));
    for (auto& h : s.samples) {
      for (auto& v : h) {
        const float re = reader.get<float>();
        const float im = reader.get<float>();
        v = cplx(re, im);
      }
    }
    const auto label = reader.get<std::uint16_t>();
    if (label > 0) s.label = static_cast<std::size_t>(label - 1);
    out.push_back(std::move(s));
  }
  return out;
}

inline nlohmann::json dataset_manifest(const DomainDataset& ds) {
  std::size_t n_min = 0, n_max = 0;
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const std::size_t n = ds.entries[i].sequence.length();
    n_min = i == 0 ? n : std::min(n_min, n);
    n_max = std::max(n_max, n);
  }
  nlohmann::ordered_json m;
  m["domain_id"] = ds.domain_id;
  m["C"] = ds.n_classes;
  m["L_H"] = ds.sample_length;
  m["N_range"] = {n_min, n_max};
  m["seed"] = ds.seed;
  m["user_id"] = ds.user_id;
  m["scene_hash"] = io::hex64(ds.scene_hash);
  m["entry_count"] = ds.entries.size();
  m["endianness"] = "little";
  return m;
}

inline void write_dataset(const std::filesystem::path& dir, const DomainDataset& ds) {
  std::vector<const CsiSequence*> seqs;
  for (const auto& e : ds.entries) {
    require(e.sequence.label && *e.sequence.label == e.label, "entry label disagrees with its sequence label");
    seqs.push_back(&e.sequence);
  }
  io::write_file_atomic(dir / "data.bin", encode_sequences(seqs, ds.sample_length));
  io::write_file_atomic(dir / "manifest.json", nlohmann::ordered_json(dataset_manifest(ds)).dump(2) + "\n");
}

inline DomainDataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  require<IoError>(manifest.value("endianness", "") == "little", "unsupported endianness tag");
  DomainDataset ds;
  ds.domain_id = manifest.at("domain_id").get<std::uint64_t>();
  ds.n_classes = manifest.at("C").get<std::size_t>();
  ds.sample_length = manifest.at("L_H").get<std::size_t>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.user_id = manifest.value("user_id", std::uint64_t{0});
  ds.scene_hash = std::stoull(manifest.at("scene_hash").get<std::string>(), nullptr, 16);
  auto seqs = decode_sequences(io::read_file(dir / "data.bin"), ds.sample_length);
  require<IoError>(seqs.size() == manifest.at("entry_count").get<std::size_t>(), "entry_count mismatch in ",
                   dir.string());
  for (auto& s : seqs) {
    require<IoError>(s.label.has_value() && *s.label < ds.n_classes, "dataset entry without a valid label");
    const std::size_t label = *s.label;
    ds.entries.push_back({std::move(s), label});
  }
  return ds;
}

}  // namespace edgecl
