#pragma once

#include "prpl/classifier.hpp"
#include "prpl/confident_set.hpp"
#include "prpl/diagnostics.hpp"
#include "prpl/error.hpp"
#include "prpl/evaluation.hpp"
#include "prpl/feature_store.hpp"
#include "prpl/linalg.hpp"
#include "prpl/mmd.hpp"
#include "prpl/parallel.hpp"
#include "prpl/pseudo.hpp"
#include "prpl/random.hpp"
#include "prpl/selector.hpp"
