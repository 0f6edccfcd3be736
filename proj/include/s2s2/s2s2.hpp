#pragma once

#include "s2s2/checkpoint.hpp"
#include "s2s2/config.hpp"
#include "s2s2/dataset_io.hpp"
#include "s2s2/diffcore/adam.hpp"
#include "s2s2/diffcore/grad_check.hpp"
#include "s2s2/diffcore/losses.hpp"
#include "s2s2/diffcore/ops.hpp"
#include "s2s2/diffcore/rng.hpp"
#include "s2s2/diffcore/tensor.hpp"
#include "s2s2/errors.hpp"
#include "s2s2/harness.hpp"
#include "s2s2/metrics.hpp"
#include "s2s2/segnet.hpp"
#include "s2s2/stacklab.hpp"
#include "s2s2/synthgen.hpp"
#include "s2s2/trainer.hpp"
#include "s2s2/types.hpp"
