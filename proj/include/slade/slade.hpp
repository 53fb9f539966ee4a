#pragma once

#include "slade/basis.hpp"
#include "slade/core.hpp"
#include "slade/dataio.hpp"
#include "slade/embedding.hpp"
#include "slade/gradcheck.hpp"
#include "slade/kmeans.hpp"
#include "slade/losses.hpp"
#include "slade/mining.hpp"
#include "slade/retrieval.hpp"
#include "slade/trainer.hpp"
