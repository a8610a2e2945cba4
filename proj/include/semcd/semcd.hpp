#pragma once

// Umbrella header.

#include "semcd/checkpoint.hpp"
#include "semcd/config.hpp"
#include "semcd/data.hpp"
#include "semcd/decoders.hpp"
#include "semcd/encoder.hpp"
#include "semcd/error.hpp"
#include "semcd/fpn.hpp"
#include "semcd/image.hpp"
#include "semcd/losses.hpp"
#include "semcd/metrics.hpp"
#include "semcd/model.hpp"
#include "semcd/model_io.hpp"
#include "semcd/outputs.hpp"
#include "semcd/prompter.hpp"
#include "semcd/sha256.hpp"
#include "semcd/synthetic.hpp"
#include "semcd/tensor_utils.hpp"
#include "semcd/text_encoder.hpp"
#include "semcd/training.hpp"
#include "semcd/vocabulary.hpp"
