#pragma once

#include "odenet/error.hpp"
#include "odenet/autodiff.hpp"
#include "odenet/mlp.hpp"
#include "odenet/optim.hpp"
#include "odenet/truth.hpp"
#include "odenet/reference_integrator.hpp"
#include "odenet/analysis.hpp"
#include "odenet/dataset.hpp"
#include "odenet/model.hpp"
#include "odenet/training.hpp"
#include "odenet/evaluation.hpp"
#include "odenet/checkpoint.hpp"
#include "odenet/experiment.hpp"
#include "odenet/workflow.hpp"
