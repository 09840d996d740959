#pragma once

#include "kcnet/baselines.hpp"
#include "kcnet/common.hpp"
#include "kcnet/core.hpp"
#include "kcnet/data.hpp"
#include "kcnet/doa.hpp"
#include "kcnet/eval.hpp"
#include "kcnet/gradcheck.hpp"
#include "kcnet/model_io.hpp"
