#pragma once

#include "reidkit/harness/checkpoint.hpp"
#include "reidkit/harness/config.hpp"
#include "reidkit/harness/experiments.hpp"
#include "reidkit/harness/optim.hpp"
#include "reidkit/harness/report.hpp"
#include "reidkit/harness/schedule.hpp"
#include "reidkit/harness/trainer.hpp"
