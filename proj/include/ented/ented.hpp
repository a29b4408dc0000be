#pragma once

#include "ented/checkpoint.hpp"
#include "ented/errors.hpp"
#include "ented/factors.hpp"
#include "ented/kernels.hpp"
#include "ented/metrics.hpp"
#include "ented/model.hpp"
#include "ented/pg.hpp"
#include "ented/predict.hpp"
#include "ented/probit.hpp"
#include "ented/solve.hpp"
#include "ented/svgp.hpp"
#include "ented/tensordata.hpp"
#include "ented/trainer.hpp"
#include "ented/vgauss.hpp"
