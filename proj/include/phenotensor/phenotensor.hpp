#pragma once

#include "common.hpp"
#include "text_io.hpp"
#include "cohort.hpp"
#include "tensor.hpp"
#include "cp_model.hpp"
#include "glm.hpp"
#include "evaluation.hpp"
#include "solver.hpp"
#include "simulate.hpp"
#include "experiment.hpp"
