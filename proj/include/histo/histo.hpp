#pragma once

#include "histo/error.hpp"
#include "histo/tensor.hpp"
#include "histo/tape.hpp"
#include "histo/ops.hpp"
#include "histo/ops_sort.hpp"
#include "histo/ops_conv.hpp"
#include "histo/losses.hpp"
#include "histo/metrics.hpp"
#include "histo/grad_check.hpp"
#include "histo/histo_attention.hpp"
#include "histo/dgff.hpp"
#include "histo/parameter_store.hpp"
#include "histo/backbone.hpp"
#include "histo/checkpoint.hpp"
#include "histo/optim.hpp"
#include "histo/ppm.hpp"
#include "histo/data_synth.hpp"
#include "histo/train.hpp"
