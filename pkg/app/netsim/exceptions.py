class TopologyError(Exception):
    """Описание топологии не годится для запуска."""


class ParseError(TopologyError):
    """JSON топологии или нагрузки не разбирается или не проходит схему."""


class RoutingLoop(TopologyError):
    """Маршруты к какому-то адресату образуют цикл."""


class DanglingLink(TopologyError):
    """Линк ссылается на необъявленный узел."""


class InvariantViolation(Exception):
    """Проверка после прогона нашла нарушение инварианта симуляции."""
