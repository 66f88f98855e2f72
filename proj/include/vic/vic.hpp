#pragma once

#include "vic/core.hpp"
#include "vic/dataset.hpp"
#include "vic/simulator.hpp"
#include "vic/featurizer.hpp"
#include "vic/icg.hpp"
#include "vic/ompm.hpp"
#include "vic/baselines.hpp"
#include "vic/metrics.hpp"
#include "vic/losses.hpp"
#include "vic/model.hpp"
#include "vic/training.hpp"
#include "vic/experiment.hpp"
