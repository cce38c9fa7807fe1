#pragma once

#include "fieldlock/core.hpp"
#include "fieldlock/dsl.hpp"
#include "fieldlock/harness.hpp"
#include "fieldlock/interp.hpp"
#include "fieldlock/monitor.hpp"
#include "fieldlock/oracle.hpp"
#include "fieldlock/trace.hpp"
#include "fieldlock/txn.hpp"
#include "fieldlock/value.hpp"
#include "fieldlock/waitfor.hpp"
#include "fieldlock/workload.hpp"
