#pragma once

#include "caps_ood/caps.hpp"
#include "caps_ood/embedding_store.hpp"
#include "caps_ood/epd.hpp"
#include "caps_ood/error.hpp"
#include "caps_ood/eval.hpp"
#include "caps_ood/linalg.hpp"
#include "caps_ood/sae.hpp"
#include "caps_ood/synth.hpp"
