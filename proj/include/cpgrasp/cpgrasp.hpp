#pragma once

#include "cpgrasp/contact.hpp"
#include "cpgrasp/dataset.hpp"
#include "cpgrasp/errors.hpp"
#include "cpgrasp/geom.hpp"
#include "cpgrasp/harness.hpp"
#include "cpgrasp/io.hpp"
#include "cpgrasp/isosurface.hpp"
#include "cpgrasp/oracle.hpp"
#include "cpgrasp/parallel.hpp"
#include "cpgrasp/planner.hpp"
#include "cpgrasp/scene.hpp"
#include "cpgrasp/tsdf.hpp"
