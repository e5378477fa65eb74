#pragma once

#include "mgn/ablation.hpp"
#include "mgn/battery.hpp"
#include "mgn/config.hpp"
#include "mgn/data.hpp"
#include "mgn/flops.hpp"
#include "mgn/gradcheck.hpp"
#include "mgn/image.hpp"
#include "mgn/inference.hpp"
#include "mgn/io.hpp"
#include "mgn/metrics.hpp"
#include "mgn/model.hpp"
#include "mgn/nn.hpp"
#include "mgn/ops.hpp"
#include "mgn/params.hpp"
#include "mgn/rng.hpp"
#include "mgn/runtime.hpp"
#include "mgn/tensor.hpp"
#include "mgn/train.hpp"
