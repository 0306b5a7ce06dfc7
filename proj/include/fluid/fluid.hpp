#pragma once

#include "fluid/experiment.hpp"
