#pragma once

// Umbrella header for the camera+LiDAR road-detection toolkit.

#include "sfcn/checkpoint.hpp"
#include "sfcn/dataset.hpp"
#include "sfcn/error.hpp"
#include "sfcn/evaluation.hpp"
#include "sfcn/image_io.hpp"
#include "sfcn/lidar.hpp"
#include "sfcn/network.hpp"
#include "sfcn/ops.hpp"
#include "sfcn/optim.hpp"
#include "sfcn/pipeline.hpp"
#include "sfcn/reference.hpp"
#include "sfcn/tensor.hpp"
#include "sfcn/training.hpp"
