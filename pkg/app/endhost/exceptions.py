class EndhostError(Exception):
    """Базовая ошибка стека конечного хоста."""


class PolicyViolation(EndhostError):
    """TPP обращается к памяти, не разрешённой политиками приложения."""

    def __init__(self, message: str, report=None) -> None:
        super().__init__(message)
        self.report = report


class PolicyConflict(EndhostError):
    """Диапазон записи пересекается с диапазоном записи другого приложения."""


class UnknownApp(EndhostError):
    """appid не зарегистрирован в TPP-CP."""


class UnknownRule(EndhostError):
    """Правила с таким handle нет."""


class Exhausted(EndhostError):
    """Исчерпаны повторы: завершённый TPP так и не вернулся."""


class Unsplittable(EndhostError):
    """TPP не помещается в бюджет даже на один хоп."""
