// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tmdc/tensor.hpp"
#include "tmdc/ops.hpp"
#include "tmdc/gradcheck.hpp"
#include "tmdc/rng.hpp"
#include "tmdc/layers.hpp"
#include "tmdc/modality.hpp"
#include "tmdc/data.hpp"
#include "tmdc/tmdf.hpp"
#include "tmdc/model.hpp"
#include "tmdc/optim.hpp"
#include "tmdc/metrics.hpp"
#include "tmdc/train.hpp"
#include "tmdc/checkpoint.hpp"
#include "tmdc/diagnostics.hpp"
