//! Holds the `acceptance` test target, which runs every experiment config in
//! `configs/` at full scale. Kept in its own package so that it runs after the
//! library and CLI tests.
