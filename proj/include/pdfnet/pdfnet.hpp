#pragma once

// Umbrella header: the full library.

#include "pdfnet/errors.hpp"
#include "pdfnet/image_io.hpp"
#include "pdfnet/patchify.hpp"
#include "pdfnet/dataset.hpp"
#include "pdfnet/synthetic.hpp"
#include "pdfnet/layers.hpp"
#include "pdfnet/cross_attention.hpp"
#include "pdfnet/boundary.hpp"
#include "pdfnet/fusion.hpp"
#include "pdfnet/backbone.hpp"
#include "pdfnet/network.hpp"
#include "pdfnet/losses.hpp"
#include "pdfnet/metrics.hpp"
#include "pdfnet/evaluate.hpp"
#include "pdfnet/config.hpp"
#include "pdfnet/checkpoint.hpp"
#include "pdfnet/trainer.hpp"
#include "pdfnet/evaluator.hpp"
#include "pdfnet/selftest.hpp"
