#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace prism {

/// Flat real vector in parameter space (theta, gradients, directions).
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Flat gradient of a loss with respect to theta.
using GradientVector = Vector;

/// Ordered token ids in [0, V).
using TokenSequence = std::vector<int>;

/// Candidate training example z = (x, y). Ids are dense 0..n-1 within a pool.
struct Example {
    int id = 0;
    TokenSequence query;
    TokenSequence response;
};

/// Paired target (q, y+, y-).
struct PairedTarget {
    int id = 0;
    TokenSequence query;
    TokenSequence positive;
    TokenSequence negative;

    bool degenerate() const { return positive == negative; }
};

enum class Label : std::uint8_t { Benign, Harmful };

// Errors. The CLI maps ValidationError to exit status 1 and everything else to 2.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: ranges, missing files, unknown keys, malformed records.
class ValidationError : public Error {
public:
    using Error::Error;
};

class InvalidTokenError : public ValidationError {
public:
    InvalidTokenError(int token, int vocab_size)
        : ValidationError("token id " + std::to_string(token) + " outside vocabulary of size " +
                          std::to_string(vocab_size)),
          token_(token) {}
    int token() const { return token_; }

private:
    int token_;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double best_grad_norm)
        : Error(what), best_grad_norm_(best_grad_norm) {}
    double best_grad_norm() const { return best_grad_norm_; }

private:
    double best_grad_norm_;
};

}  // namespace prism
