#pragma once

#include "fraudstream/broker.hpp"
#include "fraudstream/config.hpp"
#include "fraudstream/error.hpp"
#include "fraudstream/experiment.hpp"
#include "fraudstream/features.hpp"
#include "fraudstream/generator.hpp"
#include "fraudstream/learner.hpp"
#include "fraudstream/metrics.hpp"
#include "fraudstream/preprocess.hpp"
#include "fraudstream/random.hpp"
#include "fraudstream/store.hpp"
#include "fraudstream/streaming.hpp"
#include "fraudstream/transaction.hpp"
