from __future__ import annotations

from typing import Any, Iterator


class Message:
    """A structured record value: a type name plus a mapping of set fields.

    Repeated fields hold lists, nested message fields hold ``Message``
    instances.  Unset fields are simply absent.
    """

    __slots__ = ("type_name", "fields")

    def __init__(self, type_name: str, fields: dict | None = None, **kwargs: Any):
        self.type_name = type_name
        self.fields: dict[str, Any] = {}
        for source in (fields or {}), kwargs:
            for name, value in source.items():
                if value is not None:
                    self.fields[name] = value

    def get(self, name: str, default: Any = None) -> Any:
        return self.fields.get(name, default)

    def __getitem__(self, name: str) -> Any:
        return self.fields[name]

    def __setitem__(self, name: str, value: Any) -> None:
        if value is None:
            self.fields.pop(name, None)
        else:
            self.fields[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.fields

    def __iter__(self) -> Iterator[str]:
        return iter(self.fields)

    def has(self, name: str) -> bool:
        return name in self.fields

    def copy(self, **changes: Any) -> "Message":
        fields = dict(self.fields)
        fields.update(changes)
        return Message(self.type_name, fields)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, Message):
                return v.to_dict()
            if isinstance(v, list):
                return [conv(x) for x in v]
            return v

        return {k: conv(v) for k, v in self.fields.items()}

    def _normalized(self) -> dict:
        # An empty repeated field is indistinguishable from an unset one.
        return {k: v for k, v in self.fields.items() if v != []}

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return self.type_name == other.type_name and self._normalized() == other._normalized()

    def __hash__(self):
        return hash((self.type_name, repr(sorted(self._normalized().items()))))

    def __repr__(self):
        body = ", ".join(f"{k}={v!r}" for k, v in self.fields.items())
        return f"{self.type_name}({body})"
