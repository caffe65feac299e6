#pragma once

#include "anomaly.hpp"
#include "backprop.hpp"
#include "checkpoint.hpp"
#include "detectors.hpp"
#include "encoder.hpp"
#include "errors.hpp"
#include "icosphere.hpp"
#include "manifest.hpp"
#include "mesh_io.hpp"
#include "patch_layout.hpp"
#include "pipeline.hpp"
#include "resample.hpp"
#include "roi.hpp"
#include "stats.hpp"
#include "surface.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"
