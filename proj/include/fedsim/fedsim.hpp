#pragma once

#include "fedsim/audit.hpp"
#include "fedsim/canary.hpp"
#include "fedsim/corpus.hpp"
#include "fedsim/federated.hpp"
#include "fedsim/harness.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/privacy.hpp"
#include "fedsim/rng.hpp"
