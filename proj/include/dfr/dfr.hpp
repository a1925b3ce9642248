#pragma once

#include "dfr/attack.hpp"
#include "dfr/base64.hpp"
#include "dfr/core.hpp"
#include "dfr/detectors.hpp"
#include "dfr/disjoint_set.hpp"
#include "dfr/genetic.hpp"
#include "dfr/metrics.hpp"
#include "dfr/oracle.hpp"
#include "dfr/pgd.hpp"
#include "dfr/pipeline.hpp"
#include "dfr/png.hpp"
#include "dfr/random.hpp"
#include "dfr/remote.hpp"
#include "dfr/split.hpp"
#include "dfr/typographic.hpp"
#include "dfr/vlm.hpp"
