#pragma once

#include "kmc/diagnostics.hpp"
#include "kmc/dynamics.hpp"
#include "kmc/errors.hpp"
#include "kmc/features.hpp"
#include "kmc/io.hpp"
#include "kmc/kernels.hpp"
#include "kmc/parallel.hpp"
#include "kmc/rng.hpp"
#include "kmc/samplers.hpp"
#include "kmc/score_matching.hpp"
#include "kmc/targets.hpp"
