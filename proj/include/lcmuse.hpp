#pragma once

#include "lcmuse/autodiff.hpp"
#include "lcmuse/cg.hpp"
#include "lcmuse/checkpoint.hpp"
#include "lcmuse/config.hpp"
#include "lcmuse/conv.hpp"
#include "lcmuse/dataset.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/experiment.hpp"
#include "lcmuse/fft.hpp"
#include "lcmuse/lcmt.hpp"
#include "lcmuse/mri.hpp"
#include "lcmuse/network.hpp"
#include "lcmuse/probes.hpp"
#include "lcmuse/rng.hpp"
#include "lcmuse/solver.hpp"
#include "lcmuse/tensor.hpp"
#include "lcmuse/training.hpp"
#include "lcmuse/verify.hpp"
