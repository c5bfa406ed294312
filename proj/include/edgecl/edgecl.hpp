#pragma once

#include "edgecl/common.hpp"
#include "edgecl/csi_sim.hpp"
#include "edgecl/dataset_io.hpp"
#include "edgecl/preprocess.hpp"
#include "edgecl/model.hpp"
#include "edgecl/train.hpp"
#include "edgecl/coreset.hpp"
#include "edgecl/harness.hpp"
