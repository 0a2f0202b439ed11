#pragma once

#include "mergecap/data_io.hpp"
#include "mergecap/decoder.hpp"
#include "mergecap/errors.hpp"
#include "mergecap/gradcheck.hpp"
#include "mergecap/metrics.hpp"
#include "mergecap/model.hpp"
#include "mergecap/nn.hpp"
#include "mergecap/tensor.hpp"
#include "mergecap/text_pipeline.hpp"
#include "mergecap/trainer.hpp"
