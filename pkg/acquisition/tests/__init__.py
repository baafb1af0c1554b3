# Test package - imports all test classes for Django test discovery
from acquisition.tests.test_knowledge_store import *  # noqa: F401, F403
from acquisition.tests.test_embedding_space import *  # noqa: F401, F403
from acquisition.tests.test_object_classifier import *  # noqa: F401, F403
from acquisition.tests.test_question_policy import *  # noqa: F401, F403
from acquisition.tests.test_question_realizer import *  # noqa: F401, F403
from acquisition.tests.test_oracle_answerer import *  # noqa: F401, F403
from acquisition.tests.test_world_generator import *  # noqa: F401, F403
from acquisition.tests.test_experiment_harness import *  # noqa: F401, F403
from acquisition.tests.test_models import *  # noqa: F401, F403
from acquisition.tests.test_tasks import *  # noqa: F401, F403
from acquisition.tests.test_commands import *  # noqa: F401, F403
from acquisition.tests.test_acceptance import *  # noqa: F401, F403
