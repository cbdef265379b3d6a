#pragma once

#include "guide/errors.hpp"
#include "guide/rng.hpp"
#include "guide/text_io.hpp"
#include "guide/graph.hpp"
#include "guide/graph_io.hpp"
#include "guide/sbm.hpp"
#include "guide/linalg.hpp"
#include "guide/kmeans.hpp"
#include "guide/gpfb.hpp"
#include "guide/repair.hpp"
#include "guide/pyramid.hpp"
#include "guide/models.hpp"
#include "guide/engine.hpp"
