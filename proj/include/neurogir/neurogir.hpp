#pragma once

#include "neurogir/tensor.hpp"
#include "neurogir/ops.hpp"
#include "neurogir/conv.hpp"
#include "neurogir/pool.hpp"
#include "neurogir/batchnorm.hpp"
#include "neurogir/optim.hpp"
#include "neurogir/gradcheck.hpp"
#include "neurogir/gir.hpp"
#include "neurogir/unet.hpp"
#include "neurogir/losses.hpp"
#include "neurogir/volume.hpp"
#include "neurogir/preprocess.hpp"
#include "neurogir/phantom.hpp"
#include "neurogir/metrics.hpp"
#include "neurogir/checkpoint.hpp"
#include "neurogir/trainer.hpp"
#include "neurogir/config.hpp"
#include "neurogir/gradcheck_suite.hpp"
#include "neurogir/commands.hpp"
