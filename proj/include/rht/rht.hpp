#pragma once

#include "rht/core/error.hpp"
#include "rht/core/parallel.hpp"
#include "rht/core/random.hpp"
#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"
#include "rht/dataio/augment.hpp"
#include "rht/dataio/describe.hpp"
#include "rht/dataio/image.hpp"
#include "rht/dataio/manifest.hpp"
#include "rht/dataio/pts.hpp"
#include "rht/fusion.hpp"
#include "rht/heatmaps.hpp"
#include "rht/htm.hpp"
#include "rht/io/rhm1.hpp"
#include "rht/losses.hpp"
#include "rht/metrics.hpp"
#include "rht/nn/layers.hpp"
#include "rht/pipeline.hpp"
#include "rht/stm.hpp"
