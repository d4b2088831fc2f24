__author__ = 'frank'


class BaseObject(object):

    def __init__(self):

        self.config = None

    def set_config(self, config):
        """
        Associate the TrainConfig the object was produced under. Objects built by the Mtgan facade carry it so that
        later operations (resume, scoring, dumps) run with the same settings.

        :param config: TrainConfig.TrainConfig instance to be associated with the object.
        """

        self.config = config
