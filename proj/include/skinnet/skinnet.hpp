#pragma once

#include "skinnet/tensor.hpp"
#include "skinnet/nn.hpp"
#include "skinnet/optim.hpp"
#include "skinnet/graph.hpp"
#include "skinnet/magc.hpp"
#include "skinnet/geometry.hpp"
#include "skinnet/voxel.hpp"
#include "skinnet/binding.hpp"
#include "skinnet/model.hpp"
#include "skinnet/io.hpp"
#include "skinnet/checkpoint.hpp"
#include "skinnet/animation.hpp"
#include "skinnet/synthetic.hpp"
#include "skinnet/training.hpp"
