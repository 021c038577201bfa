#pragma once

#include "evsee/align.hpp"
#include "evsee/bayer.hpp"
#include "evsee/dataset.hpp"
#include "evsee/error.hpp"
#include "evsee/events.hpp"
#include "evsee/image.hpp"
#include "evsee/imu.hpp"
#include "evsee/io.hpp"
#include "evsee/parallel.hpp"
#include "evsee/seenet.hpp"
#include "evsee/tensor.hpp"
