#pragma once

#include "rfulm/numerics/conv.hpp"
#include "rfulm/numerics/kernels.hpp"
#include "rfulm/numerics/lm.hpp"
#include "rfulm/numerics/resample.hpp"
#include "rfulm/numerics/svd.hpp"
#include "rfulm/numerics/tensor.hpp"
