#ifndef FUNDUS_TORCH_DOCTEST_HPP
#define FUNDUS_TORCH_DOCTEST_HPP

// c10 logging defines a CHECK macro that collides with doctest's.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>

#endif
