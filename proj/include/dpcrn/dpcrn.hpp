// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "dpcrn/adam.hpp"
#include "dpcrn/audio.hpp"
#include "dpcrn/bench.hpp"
#include "dpcrn/common.hpp"
#include "dpcrn/config.hpp"
#include "dpcrn/fft.hpp"
#include "dpcrn/gradcheck.hpp"
#include "dpcrn/layers.hpp"
#include "dpcrn/losses.hpp"
#include "dpcrn/model.hpp"
#include "dpcrn/stft.hpp"
#include "dpcrn/stream.hpp"
#include "dpcrn/tape.hpp"
#include "dpcrn/tensor.hpp"
#include "dpcrn/trainer.hpp"
#include "dpcrn/weights_io.hpp"
