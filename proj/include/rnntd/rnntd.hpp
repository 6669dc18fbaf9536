#pragma once

#include "rnntd/baselines.hpp"
#include "rnntd/checkpoint.hpp"
#include "rnntd/errors.hpp"
#include "rnntd/eval.hpp"
#include "rnntd/events.hpp"
#include "rnntd/gradcheck.hpp"
#include "rnntd/linalg.hpp"
#include "rnntd/manifest.hpp"
#include "rnntd/model.hpp"
#include "rnntd/quadrature.hpp"
#include "rnntd/rng.hpp"
#include "rnntd/simulator.hpp"
#include "rnntd/trainer.hpp"
