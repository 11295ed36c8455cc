#pragma once

#include "tcgl/tensor.hpp"
#include "tcgl/autodiff.hpp"
#include "tcgl/gradcheck.hpp"
#include "tcgl/rng.hpp"
#include "tcgl/sampler.hpp"
#include "tcgl/layers.hpp"
#include "tcgl/encoder.hpp"
#include "tcgl/tgraph.hpp"
#include "tcgl/contrast.hpp"
#include "tcgl/orderhead.hpp"
#include "tcgl/model.hpp"
#include "tcgl/config.hpp"
#include "tcgl/archive.hpp"
#include "tcgl/trainer.hpp"
#include "tcgl/evalkit.hpp"
#include "tcgl/verify.hpp"
