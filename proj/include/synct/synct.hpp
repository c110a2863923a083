#pragma once

#include "synct/error.hpp"
#include "synct/tensor.hpp"
#include "synct/mask.hpp"
#include "synct/ops.hpp"
#include "synct/features.hpp"
#include "synct/chunking.hpp"
#include "synct/lattice.hpp"
#include "synct/vocabulary.hpp"
#include "synct/model.hpp"
#include "synct/decoding.hpp"
#include "synct/optimizer.hpp"
#include "synct/train.hpp"
#include "synct/checkpoint.hpp"
#include "synct/config.hpp"
#include "synct/data.hpp"
