#pragma once

#include "vmark/archetypal.hpp"
#include "vmark/common.hpp"
#include "vmark/dataset.hpp"
#include "vmark/evaluation.hpp"
#include "vmark/heatmap.hpp"
#include "vmark/io.hpp"
#include "vmark/markers.hpp"
#include "vmark/reconstruction.hpp"
#include "vmark/simplex.hpp"
