#pragma once

// Umbrella header for the whole toolkit, minus the CLI (which pulls in
// CLI11; include proptk/cli.hpp where the command surface is needed).

#include "proptk/corpus.hpp"
#include "proptk/crf.hpp"
#include "proptk/eval.hpp"
#include "proptk/features.hpp"
#include "proptk/slc.hpp"
#include "proptk/technique.hpp"
#include "proptk/tokenize.hpp"
#include "proptk/util.hpp"
