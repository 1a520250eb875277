#pragma once

#include <stdexcept>
#include <string>

namespace fedblock {

// Base class for recoverable library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// enrichment
struct NotFoundError : Error {
  using Error::Error;
};
struct ChainTooDeepError : Error {
  using Error::Error;
};

// embedding
struct MissingVectorError : Error {
  using Error::Error;
};
struct BlankLogError : Error {
  using Error::Error;
};

// corpus / datasets
struct EmptyCorpusError : Error {
  using Error::Error;
};
struct InsufficientDataError : Error {
  using Error::Error;
};
struct EmptyDatasetError : Error {
  using Error::Error;
};
struct SingleClassError : Error {
  using Error::Error;
};

// models
struct WidthMismatchError : Error {
  using Error::Error;
};
struct ModelMissingError : Error {
  using Error::Error;
};
struct NoAcceptedUpdatesError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace fedblock
