#pragma once

#include "skyladder/analytics.hpp"
#include "skyladder/attention.hpp"
#include "skyladder/bm25.hpp"
#include "skyladder/checkpoint.hpp"
#include "skyladder/config.hpp"
#include "skyladder/corpus.hpp"
#include "skyladder/digest.hpp"
#include "skyladder/errors.hpp"
#include "skyladder/eval.hpp"
#include "skyladder/flops.hpp"
#include "skyladder/gradcheck.hpp"
#include "skyladder/masking.hpp"
#include "skyladder/model.hpp"
#include "skyladder/optim.hpp"
#include "skyladder/packing.hpp"
#include "skyladder/parallel.hpp"
#include "skyladder/schedule.hpp"
#include "skyladder/trainer.hpp"
