__all__ = ["ModelsManager", "TexterExplainer", "errors"]
from . import errors
from .ModelsManager import ModelsManager
from .Explanation_Task.explain import TexterExplainer
