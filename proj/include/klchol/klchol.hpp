#pragma once

#include "klchol/points.hpp"
#include "klchol/rng.hpp"
#include "klchol/kernel.hpp"
#include "klchol/ordering.hpp"
#include "klchol/sparsity.hpp"
#include "klchol/factor.hpp"
#include "klchol/noise.hpp"
#include "klchol/predict.hpp"
#include "klchol/oracle.hpp"
#include "klchol/io.hpp"
