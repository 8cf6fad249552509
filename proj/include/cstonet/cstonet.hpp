#pragma once

#include "cstonet/checkpoint.hpp"
#include "cstonet/config.hpp"
#include "cstonet/covariate_model.hpp"
#include "cstonet/dataset.hpp"
#include "cstonet/errors.hpp"
#include "cstonet/estimators.hpp"
#include "cstonet/network.hpp"
#include "cstonet/rng.hpp"
#include "cstonet/schedule.hpp"
#include "cstonet/simlab.hpp"
#include "cstonet/sparse_prior.hpp"
#include "cstonet/trainer.hpp"
