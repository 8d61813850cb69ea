#pragma once

// Umbrella header.

#include "locate/archive.hpp"
#include "locate/backbone.hpp"
#include "locate/cam_head.hpp"
#include "locate/common.hpp"
#include "locate/config.hpp"
#include "locate/dataset.hpp"
#include "locate/fixture.hpp"
#include "locate/image.hpp"
#include "locate/metrics.hpp"
#include "locate/part_select.hpp"
#include "locate/region_extract.hpp"
#include "locate/tensor.hpp"
#include "locate/trainer.hpp"
#include "locate/transfer_loss.hpp"
