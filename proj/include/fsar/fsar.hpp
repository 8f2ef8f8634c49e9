#pragma once

#include "fsar/data/episode.hpp"
#include "fsar/data/manifest.hpp"
#include "fsar/data/store.hpp"
#include "fsar/data/synth.hpp"
#include "fsar/engine/ablation.hpp"
#include "fsar/engine/checkpoint.hpp"
#include "fsar/engine/config.hpp"
#include "fsar/engine/gradsuite.hpp"
#include "fsar/engine/metrics.hpp"
#include "fsar/engine/model.hpp"
#include "fsar/engine/report.hpp"
#include "fsar/engine/train.hpp"
#include "fsar/model/distances.hpp"
#include "fsar/model/fusion.hpp"
#include "fsar/model/hsmr.hpp"
#include "fsar/model/padm.hpp"
#include "fsar/model/spm.hpp"
#include "fsar/tensor/gradcheck.hpp"
#include "fsar/tensor/nn.hpp"
#include "fsar/tensor/ops.hpp"
#include "fsar/tensor/optim.hpp"
#include "fsar/tensor/tensor.hpp"
