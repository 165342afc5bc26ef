#pragma once

#include "mtpn/analyzer.hpp"
#include "mtpn/architecture.hpp"
#include "mtpn/autograd.hpp"
#include "mtpn/checkpoint.hpp"
#include "mtpn/config.hpp"
#include "mtpn/detection.hpp"
#include "mtpn/error.hpp"
#include "mtpn/image.hpp"
#include "mtpn/losses.hpp"
#include "mtpn/mask.hpp"
#include "mtpn/metrics.hpp"
#include "mtpn/network.hpp"
#include "mtpn/ops.hpp"
#include "mtpn/run_config.hpp"
#include "mtpn/runtime.hpp"
#include "mtpn/synth.hpp"
#include "mtpn/tally.hpp"
#include "mtpn/tensor.hpp"
#include "mtpn/training.hpp"
#include "mtpn/vjp.hpp"
