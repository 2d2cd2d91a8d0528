#pragma once

#include "rfulm/network/augment.hpp"
#include "rfulm/network/loss.hpp"
#include "rfulm/network/model.hpp"
#include "rfulm/network/optim.hpp"
#include "rfulm/network/train.hpp"
