"""Estimator plumbing following the scikit-learn parameter conventions.

Constructor arguments are stored verbatim under matching attribute names and
exposed through ``get_params``/``set_params``, so estimators here duck-type
with ``sklearn.base.clone`` and pipeline tooling without importing sklearn.
Fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import inspect

from .errors import ConfigError, UsageError


class BaseEstimator:
    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep: bool = True) -> dict:
        params = {name: getattr(self, name) for name in self._param_names()}
        if deep:
            for name, value in list(params.items()):
                if hasattr(value, "get_params") and not isinstance(value, type):
                    for sub, sub_value in value.get_params(deep=True).items():
                        params[f"{name}__{sub}"] = sub_value
        return params

    def set_params(self, **params) -> "BaseEstimator":
        valid = set(self._param_names())
        nested: dict[str, dict] = {}
        for key, value in params.items():
            if "__" in key:
                head, _, tail = key.partition("__")
                nested.setdefault(head, {})[tail] = value
                continue
            if key not in valid:
                raise ConfigError(
                    f"unknown parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}"
                )
            setattr(self, key, value)
        for head, sub in nested.items():
            if head not in valid:
                raise ConfigError(f"unknown parameter {head!r} for {type(self).__name__}")
            getattr(self, head).set_params(**sub)
        return self

    def _check_fitted(self, attr: str) -> None:
        if getattr(self, attr, None) is None:
            raise UsageError(f"{type(self).__name__} is not fitted yet; call fit first")

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params(deep=False).items())
        return f"{type(self).__name__}({args})"
