#pragma once

#include <adiaplan/bloch.hpp>
#include <adiaplan/error.hpp>
#include <adiaplan/geometry.hpp>
#include <adiaplan/mask.hpp>
#include <adiaplan/nifti.hpp>
#include <adiaplan/parallel.hpp>
#include <adiaplan/planner.hpp>
#include <adiaplan/pulse.hpp>
#include <adiaplan/resample.hpp>
#include <adiaplan/svg.hpp>
#include <adiaplan/version.hpp>
#include <adiaplan/volume.hpp>
