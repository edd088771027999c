"""Deep Q-learning for multi-lane highway driving on a kinematic simulator."""
