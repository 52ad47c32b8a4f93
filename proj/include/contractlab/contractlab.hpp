#pragma once

// Umbrella header for the contraction-certificate laboratory.

#include "contractlab/auxfun.hpp"
#include "contractlab/bismut.hpp"
#include "contractlab/common.hpp"
#include "contractlab/harness.hpp"
#include "contractlab/linalg.hpp"
#include "contractlab/model.hpp"
#include "contractlab/otdist.hpp"
#include "contractlab/quadrature.hpp"
#include "contractlab/rng.hpp"
#include "contractlab/sde.hpp"
#include "contractlab/zvonkin.hpp"
