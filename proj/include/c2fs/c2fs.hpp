#pragma once

// Umbrella header for the coarse-to-fine few-shot (C2FS) library: twofold
// debiasing training (reconstruction + alignment on top of coarse CE and
// within-class contrast), feature-repository-based classifier calibration,
// and episodic evaluation.

#include "c2fs/ablation.hpp"
#include "c2fs/augment.hpp"
#include "c2fs/autodiff.hpp"
#include "c2fs/calibrate.hpp"
#include "c2fs/checkpoint.hpp"
#include "c2fs/data.hpp"
#include "c2fs/dataset_io.hpp"
#include "c2fs/episodes.hpp"
#include "c2fs/error.hpp"
#include "c2fs/linear_classifier.hpp"
#include "c2fs/losses.hpp"
#include "c2fs/model.hpp"
#include "c2fs/ops.hpp"
#include "c2fs/optim.hpp"
#include "c2fs/probe.hpp"
#include "c2fs/repository.hpp"
#include "c2fs/rng.hpp"
#include "c2fs/run_config.hpp"
#include "c2fs/synth.hpp"
#include "c2fs/tensor.hpp"
#include "c2fs/trainer.hpp"
