#pragma once

// Exemplar selection (k-means++/Lloyd clustering + herding), distilled labels and the
// accumulated knowledge core-set with its memory accounting and persistence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "edgecl/common.hpp"
#include "edgecl/csi_sim.hpp"
#include "edgecl/dataset_io.hpp"
#include "edgecl/model.hpp"
#include "edgecl/train.hpp"

namespace edgecl {

/// Feature vectors of one class (one per row) and their indices in the source dataset.
struct ClassFeatures {
  Matrix features;
  std::vector<std::size_t> source;
};

struct FeatureSet {
  std::size_t dim = 0;
  std::vector<ClassFeatures> classes;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.source.size();
    return n;
  }
};

inline FeatureSet build_feature_set(const ModelParams& params, std::span<const PreprocessedSequence> inputs,
                                    std::span<const std::size_t> labels, std::size_t n_classes) {
  require(inputs.size() == labels.size(), "inputs/labels length mismatch");
  FeatureSet fs;
  fs.dim = params.config().width;
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < n_classes, "label ", labels[i], " out of range");
    members[labels[i]].push_back(i);
  }
  fs.classes.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    ClassFeatures& cf = fs.classes[c];
    cf.source = members[c];
    cf.features.resize(static_cast<Eigen::Index>(cf.source.size()), static_cast<Eigen::Index>(fs.dim));
    for (std::size_t r = 0; r < cf.source.size(); ++r)
      cf.features.row(static_cast<Eigen::Index>(r)) = extract_feature(params, inputs[cf.source[r]]).transpose();
  }
  return fs;
}

inline FeatureSet build_feature_set(const ModelParams& params, std::span<const PreprocessedSequence> inputs,
                                    const DomainDataset& ds) {
  std::vector<std::size_t> labels;
  for (const auto& e : ds.entries) labels.push_back(e.label);
  return build_feature_set(params, inputs, labels, ds.n_classes);
}

/// sum_f min_j ||f - c_j||^2 over the rows of F.
inline double kmeans_objective(const Matrix& F, const Matrix& centers) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < F.rows(); ++i)
    total += (centers.rowwise() - F.row(i)).rowwise().squaredNorm().minCoeff();
  return total;
}

/// The clustering objective evaluated with the selected members as centres.
inline double member_objective(const Matrix& F, std::span<const std::size_t> chosen) {
  Matrix centers(static_cast<Eigen::Index>(chosen.size()), F.cols());
  for (std::size_t j = 0; j < chosen.size(); ++j) centers.row(static_cast<Eigen::Index>(j)) = F.row(static_cast<Eigen::Index>(chosen[j]));
  return kmeans_objective(F, centers);
}

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  std::vector<double> objective_history;  // after each assignment step
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

// Nearest centre; ties go to the lowest index.
inline std::pair<std::size_t, double> nearest_row(const Matrix& centers, const auto& point) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < centers.rows(); ++j) {
    const double d = (centers.row(j) - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(j);
    }
  }
  return {best, best_d};
}

inline Matrix kmeanspp_seed(const Matrix& F, std::size_t m, Rng& rng) {
  const auto n = static_cast<std::size_t>(F.rows());
  Matrix centers(static_cast<Eigen::Index>(m), F.cols());
  std::vector<bool> taken(n, false);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  centers.row(0) = F.row(static_cast<Eigen::Index>(first));
  taken[first] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (F.row(static_cast<Eigen::Index>(i)) - centers.row(0)).squaredNorm();
  for (std::size_t j = 1; j < m; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double u = uniform(rng, 0.0, total);
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        if (u < d2[i]) break;
        u -= d2[i];
      }
    } else {
      // Every point coincides with a centre: take an unused point uniformly.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) free.push_back(i);
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    }
    taken[pick] = true;
    centers.row(static_cast<Eigen::Index>(j)) = F.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (F.row(static_cast<Eigen::Index>(i)) - centers.row(static_cast<Eigen::Index>(j))).squaredNorm());
  }
  return centers;
}

}  // namespace detail

/// k-means++ seeding then Lloyd iterations until the assignment is unchanged or
/// `max_iterations` is reached. An empty cluster is reseeded at the point farthest
/// from its own centroid.
inline KMeansResult kmeans_cluster(const Matrix& F, std::size_t m, std::uint64_t seed, std::size_t max_iterations = 100) {
  const auto n = static_cast<std::size_t>(F.rows());
  require(m >= 1 && m <= n, "cluster count ", m, " must be in [1, ", n, "]");
  Rng rng = make_rng(seed, 0x6b6d65616e73ULL);
  KMeansResult r;
  r.centroids = detail::kmeanspp_seed(F, m, rng);
  r.assignment.assign(n, n);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [j, d] = detail::nearest_row(r.centroids, F.row(static_cast<Eigen::Index>(i)));
      changed = changed || j != r.assignment[i];
      r.assignment[i] = j;
      dist[i] = d;
      obj += d;
    }
    r.objective_history.push_back(obj);
    r.iterations = it + 1;
    if (!changed) {
      r.converged = true;
      break;
    }
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(m), F.cols());
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(r.assignment[i])) += F.row(static_cast<Eigen::Index>(i));
      ++counts[r.assignment[i]];
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (counts[j] > 0) {
        r.centroids.row(static_cast<Eigen::Index>(j)) = sums.row(static_cast<Eigen::Index>(j)) / static_cast<double>(counts[j]);
        continue;
      }
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      r.centroids.row(static_cast<Eigen::Index>(j)) = F.row(static_cast<Eigen::Index>(far));
      dist[far] = 0.0;
    }
  }
  return r;
}

/// Maps each centroid to its nearest member (ties to the lowest index); a member
/// already claimed by an earlier centroid passes to the next-nearest one.
inline std::vector<std::size_t> centroids_to_members(const Matrix& F, const Matrix& centroids) {
  const auto n = static_cast<std::size_t>(F.rows());
  require(static_cast<std::size_t>(centroids.rows()) <= n, "more centroids than members");
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = (F.row(static_cast<Eigen::Index>(i)) - centroids.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    taken[best] = true;
    out.push_back(best);
  }
  return out;
}

/// m distinct row indices of F chosen as the members nearest the Lloyd centroids.
inline std::vector<std::size_t> kmeans_select(const Matrix& F, std::size_t m, std::uint64_t seed,
                                              KMeansResult* diagnostics = nullptr) {
  require(m <= static_cast<std::size_t>(F.rows()), "cannot select ", m, " of ", F.rows(), " members");
  if (m == 0) return {};
  KMeansResult r = kmeans_cluster(F, m, seed);
  auto picks = centroids_to_members(F, r.centroids);
  if (diagnostics) *diagnostics = std::move(r);
  return picks;
}

enum class HerdingForm {
  running_mean,  // || (sum of chosen) / j - mean ||
  running_sum,   // || sum of chosen - mean ||
};

struct HerdingStep {
  std::size_t chosen = 0;
  std::vector<double> candidate_distance;  // per row of F; +inf for already chosen rows
};

/// Greedy nearest-class-mean selection of m further rows given `fixed` picks.
inline std::vector<std::size_t> herding_select(const Matrix& F, std::span<const std::size_t> fixed, std::size_t m,
                                               HerdingForm form = HerdingForm::running_mean,
                                               std::vector<HerdingStep>* steps = nullptr) {
  const auto n = static_cast<std::size_t>(F.rows());
  require(m + fixed.size() <= n, "herding cannot select ", m, " more after ", fixed.size(), " of ", n);
  std::vector<bool> taken(n, false);
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(F.cols());
  for (std::size_t i : fixed) {
    require(i < n && !taken[i], "invalid or repeated fixed index ", i);
    taken[i] = true;
    sum += F.row(static_cast<Eigen::Index>(i));
  }
  const Eigen::RowVectorXd mean = F.colwise().mean();
  std::vector<std::size_t> out;
  for (std::size_t step = 0; step < m; ++step) {
    const double j = static_cast<double>(fixed.size() + step + 1);
    HerdingStep trace;
    trace.candidate_distance.assign(n, std::numeric_limits<double>::infinity());
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      Eigen::RowVectorXd cand = sum + F.row(static_cast<Eigen::Index>(i));
      if (form == HerdingForm::running_mean) cand /= j;
      const double d = (cand - mean).norm();
      trace.candidate_distance[i] = d;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    taken[best] = true;
    sum += F.row(static_cast<Eigen::Index>(best));
    out.push_back(best);
    trace.chosen = best;
    if (steps) steps->push_back(std::move(trace));
  }
  return out;
}

/// round(beta * E) by clustering, the remainder by herding with the clustering picks fixed.
inline std::vector<std::size_t> select_exemplars(const Matrix& F, std::size_t E, double beta, std::uint64_t seed,
                                                 HerdingForm form = HerdingForm::running_mean) {
  require(beta >= 0.0 && beta <= 1.0, "clustering-herding ratio must be in [0, 1]");
  require(E <= static_cast<std::size_t>(F.rows()), "exemplar budget ", E, " exceeds class size ", F.rows());
  const auto m1 = static_cast<std::size_t>(std::lround(beta * static_cast<double>(E)));
  std::vector<std::size_t> picks = kmeans_select(F, m1, seed);
  const auto rest = herding_select(F, picks, E - m1, form);
  picks.insert(picks.end(), rest.begin(), rest.end());
  return picks;
}

/// E uniformly random distinct rows.
inline std::vector<std::size_t> random_select(std::size_t n, std::size_t E, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x72616e64ULL);
  return sample_without_replacement(n, E, rng);
}

/// g_eta predictions (eval mode) used as frozen soft labels.
inline std::vector<std::vector<double>> distill_labels(const ModelParams& params,
                                                       std::span<const PreprocessedSequence> exemplars, double eta) {
  std::vector<std::vector<double>> out;
  out.reserve(exemplars.size());
  for (const auto& x : exemplars) out.push_back(forward_downscaled(params, x, eta));
  return out;
}

struct CoresetEntry {
  CsiSequence sequence;
  std::vector<double> label;  // distilled or one-hot
  std::size_t domain = 0;
  std::size_t cls = 0;
};

/// K_k: the union of all stored per-(domain, class) exemplar sets.
struct KnowledgeCoreSet {
  std::size_t per_class = 0;  // E
  double eta = 1.0;
  std::vector<CoresetEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool contains(std::size_t domain, std::size_t cls) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const CoresetEntry& e) { return e.domain == domain && e.cls == cls; });
  }
};

/// Appends one domain's exemplars; earlier entries are left untouched.
inline void update_knowledge(KnowledgeCoreSet& K, std::size_t domain, std::vector<CoresetEntry> additions) {
  std::vector<std::size_t> per_class;
  for (const auto& e : additions) {
    require(e.domain == domain, "exemplar tagged with domain ", e.domain, " added under domain ", domain);
    require(!K.contains(domain, e.cls), "domain ", domain, " class ", e.cls, " is already in the core-set");
    if (per_class.size() <= e.cls) per_class.resize(e.cls + 1, 0);
    ++per_class[e.cls];
    double s = 0.0;
    for (double p : e.label) s += p;
    require(std::abs(s - 1.0) <= 1e-6, "exemplar label does not sum to 1");
  }
  for (std::size_t c = 0; c < per_class.size(); ++c)
    require(per_class[c] == 0 || per_class[c] == K.per_class, "class ", c, " has ", per_class[c],
            " exemplars, expected ", K.per_class);
  for (auto& e : additions) K.entries.push_back(std::move(e));
}

struct MemoryReport {
  std::size_t stored_bytes = 0;      // serialized size of the core-set sequences
  double paper_model_floats = 0.0;   // k (N L_H + C) C E
  double ratio_vs_cumulative = 0.0;  // C E / M
};

inline double paper_model_floats(std::size_t k, std::size_t N, std::size_t L_H, std::size_t C, std::size_t E) {
  return static_cast<double>(k) * static_cast<double>(N * L_H + C) * static_cast<double>(C * E);
}

inline MemoryReport memory_report(const KnowledgeCoreSet& K, std::size_t k, std::size_t M, std::size_t N,
                                  std::size_t L_H, std::size_t C, std::size_t E) {
  require(M >= 1, "domain size M must be >= 1");
  MemoryReport r;
  for (const auto& e : K.entries) r.stored_bytes += record_bytes(e.sequence.length(), L_H);
  r.paper_model_floats = paper_model_floats(k, N, L_H, C, E);
  r.ratio_vs_cumulative = static_cast<double>(C * E) / static_cast<double>(M);
  return r;
}

// <dir>/data.bin + manifest.json in the dataset layout, plus labels.json.
inline void save_coreset(const std::filesystem::path& dir, const KnowledgeCoreSet& K, std::size_t n_classes,
                         std::size_t sample_length) {
  std::vector<const CsiSequence*> seqs;
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (const auto& e : K.entries) {
    seqs.push_back(&e.sequence);
    labels.push_back({{"domain", e.domain}, {"class", e.cls}, {"label", e.label}, {"eta", K.eta}});
  }
  nlohmann::ordered_json manifest;
  manifest["kind"] = "coreset";
  manifest["C"] = n_classes;
  manifest["L_H"] = sample_length;
  manifest["per_class"] = K.per_class;
  manifest["eta"] = K.eta;
  manifest["entry_count"] = K.entries.size();
  manifest["endianness"] = "little";
  io::write_file_atomic(dir / "data.bin", encode_sequences(seqs, sample_length));
  io::write_file_atomic(dir / "labels.json", labels.dump(2) + "\n");
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline KnowledgeCoreSet load_coreset(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  const auto labels = nlohmann::json::parse(io::read_file(dir / "labels.json"));
  KnowledgeCoreSet K;
  K.per_class = manifest.at("per_class").get<std::size_t>();
  K.eta = manifest.at("eta").get<double>();
  auto seqs = decode_sequences(io::read_file(dir / "data.bin"), manifest.at("L_H").get<std::size_t>());
  require<IoError>(seqs.size() == labels.size(), "core-set labels/data count mismatch");
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    CoresetEntry e;
    e.sequence = std::move(seqs[i]);
    e.domain = labels[i].at("domain").get<std::size_t>();
    e.cls = labels[i].at("class").get<std::size_t>();
    e.label = labels[i].at("label").get<std::vector<double>>();
    K.entries.push_back(std::move(e));
  }
  return K;
}

}  // namespace edgecl
