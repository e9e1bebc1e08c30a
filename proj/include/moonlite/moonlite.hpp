#pragma once

#include "moonlite/distribution.hpp"
#include "moonlite/errors.hpp"
#include "moonlite/experiment.hpp"
#include "moonlite/loss.hpp"
#include "moonlite/matrix.hpp"
#include "moonlite/metrics.hpp"
#include "moonlite/net.hpp"
#include "moonlite/rng.hpp"
#include "moonlite/serialize.hpp"
#include "moonlite/synthdata.hpp"
#include "moonlite/trainer.hpp"
