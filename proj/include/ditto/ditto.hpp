#pragma once

// Umbrella header for the whole pipeline library.

#include "ditto/backend.hpp"
#include "ditto/character.hpp"
#include "ditto/common.hpp"
#include "ditto/config.hpp"
#include "ditto/crosssup.hpp"
#include "ditto/dataset.hpp"
#include "ditto/eval.hpp"
#include "ditto/http.hpp"
#include "ditto/jsonl.hpp"
#include "ditto/manifest.hpp"
#include "ditto/simulate.hpp"
#include "ditto/sparql.hpp"
#include "ditto/templates.hpp"
#include "ditto/wiki.hpp"
